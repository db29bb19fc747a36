fn main() {
    std::process::exit(relightkit::cli::main_with(std::env::args_os()));
}
