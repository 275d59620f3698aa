fn main() {
    std::process::exit(vp1d::cli::main_with_args(std::env::args_os()));
}
