fn main() {
    std::process::exit(ddreg::cli::main_with(std::env::args_os()));
}
