fn main() {
    std::process::exit(cv2x_core::cli::main_with_args(std::env::args_os()));
}
