fn main() {
    std::process::exit(epimpact::cli::run());
}
