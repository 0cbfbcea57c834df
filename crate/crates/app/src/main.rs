fn main() {
    std::process::exit(plantdoc::cli::run(std::env::args_os()));
}
