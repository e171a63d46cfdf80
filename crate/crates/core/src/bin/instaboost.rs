fn main() {
    std::process::exit(instaboost::cli::run(std::env::args_os()));
}
