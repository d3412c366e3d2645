fn main() {
    std::process::exit(synmt::run());
}
