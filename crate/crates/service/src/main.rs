fn main() -> std::process::ExitCode {
    empathy_service::cli::main()
}
