fn main() {
    std::process::exit(tmrfi::cli::main_with_args(std::env::args_os()));
}
