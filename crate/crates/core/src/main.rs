fn main() {
    std::process::exit(lid_align::cli::run_from(std::env::args_os()));
}
