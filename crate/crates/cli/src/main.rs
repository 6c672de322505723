fn main() -> std::process::ExitCode {
    ozforge_cli::app::main(std::env::args_os())
}
