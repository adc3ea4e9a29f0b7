#![allow(dead_code)]

pub mod bt_reference;
pub mod oracle;
