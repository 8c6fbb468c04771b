fn main() {
    std::process::exit(transeq::cli::run(std::env::args_os()));
}
