fn main() {
    std::process::exit(imprint_lab::cli::dispatch(std::env::args_os()));
}
