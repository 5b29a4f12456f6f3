fn main() -> std::process::ExitCode {
    dscenet::cli::main()
}
