fn main() -> std::process::ExitCode {
    evsched::cli::main_entry()
}
