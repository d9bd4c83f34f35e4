fn main() {
    std::process::exit(btl::main_with_args(std::env::args_os()));
}
