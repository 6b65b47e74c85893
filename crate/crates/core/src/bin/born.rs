fn main() {
    std::process::exit(born_envariance::cli::main_with_args(std::env::args_os()));
}
