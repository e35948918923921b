fn main() {
    std::process::exit(percgest::cli::main(std::env::args_os()));
}
