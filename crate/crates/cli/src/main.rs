fn main() -> std::process::ExitCode {
    bpe_cli::main_with(std::env::args_os())
}
