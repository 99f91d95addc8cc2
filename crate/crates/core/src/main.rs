fn main() {
    std::process::exit(gcnphr::cli::main_with_args(std::env::args_os()));
}
