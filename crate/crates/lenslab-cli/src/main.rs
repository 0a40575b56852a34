fn main() {
    println!("lenslab");
}
