fn main() {
    std::process::exit(taskmod::cli::run(std::env::args_os()));
}
