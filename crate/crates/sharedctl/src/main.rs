fn main() {
    std::process::exit(sharedctl::cli::dispatch(std::env::args_os()));
}
