fn main() {
    std::process::exit(selfish_experts::cli::main());
}
