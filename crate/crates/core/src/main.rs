fn main() {
    std::process::exit(hcmfl::cli::run(std::env::args_os()));
}
