fn main() {
    std::process::exit(pipecast::cli::main_with(std::env::args_os()));
}
