fn main() {
    std::process::exit(sprime::cli::main(std::env::args_os()));
}
