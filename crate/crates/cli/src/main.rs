fn main() {
    std::process::exit(cdainv::cli::main_with_args(std::env::args_os()));
}
