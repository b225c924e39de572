fn main() -> std::process::ExitCode {
    dayembed::cli::main()
}
