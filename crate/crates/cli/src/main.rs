fn main() {
    std::process::exit(her2kit::main_with_args(std::env::args_os()));
}
