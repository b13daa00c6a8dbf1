fn main() -> std::process::ExitCode {
    pigeonhole::cli::main()
}
