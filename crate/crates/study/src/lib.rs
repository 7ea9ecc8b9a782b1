pub mod checks;
pub mod config;
pub mod oracles;
pub mod rates;
pub mod study;
pub mod verify;
