fn main() -> std::process::ExitCode {
    unfold_ci::cli::main_with_args(std::env::args_os())
}
