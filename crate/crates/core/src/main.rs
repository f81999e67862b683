fn main() {
    std::process::exit(amf::cli::run(std::env::args_os()));
}
