fn main() -> std::process::ExitCode {
    skipsr::cli::main_with_args(std::env::args_os())
}
