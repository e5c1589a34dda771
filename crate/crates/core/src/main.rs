fn main() {
    std::process::exit(egoflow::cli::run());
}
