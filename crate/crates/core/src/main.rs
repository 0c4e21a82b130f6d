fn main() -> std::process::ExitCode {
    uivtsp::cli::main()
}
