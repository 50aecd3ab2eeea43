fn main() {
    std::process::exit(widecorrect::cli::dispatch(std::env::args_os()));
}
