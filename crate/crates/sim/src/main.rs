fn main() {
    std::process::exit(byzsgd::cli::main(std::env::args_os()));
}
