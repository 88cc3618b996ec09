fn main() {
    std::process::exit(plaplace::cli::main(std::env::args_os()));
}
