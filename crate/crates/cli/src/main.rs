fn main() {
    std::process::exit(emph_cli::main_with(std::env::args_os()));
}
