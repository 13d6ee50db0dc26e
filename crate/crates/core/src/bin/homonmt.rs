fn main() {
    std::process::exit(homonmt::cli::main_with_args(std::env::args_os()));
}
