fn main() {
    std::process::exit(tgcn::cli::run(std::env::args_os()));
}
