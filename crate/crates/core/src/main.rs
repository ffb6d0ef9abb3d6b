fn main() { std::process::exit(ipembed::cli::run(std::env::args_os())); }
