fn main() {
    eprintln!("forecastctl: not yet wired up");
    std::process::exit(1);
}
