fn main() -> std::process::ExitCode {
    sheetbridge::cli::main()
}
