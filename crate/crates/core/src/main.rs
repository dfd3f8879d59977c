fn main() {
    std::process::exit(aerovln::cli::run(std::env::args_os()));
}
