fn main() {
    println!("dcn");
}
