pub mod bench;
pub mod generate;
pub mod kkt;
pub mod oracle;
