fn main() -> std::process::ExitCode {
    spmix::cli::run(std::env::args_os())
}
