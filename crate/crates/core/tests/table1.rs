//! Exemplar records for each slot type.

#[path = "support/table1_rows.rs"]
#[allow(dead_code)]
mod rows;

#[test]
fn multi_slot_bus() {
    rows::multi_slot_bus();
}

#[test]
fn long_value_cancellation() {
    rows::long_value_cancellation();
}

#[test]
fn categorical_salon() {
    rows::categorical_salon();
}

#[test]
fn name_split_doctor() {
    rows::name_split_doctor();
}

#[test]
fn id_data_dentist() {
    rows::id_data_dentist();
}

#[test]
fn address_ride() {
    rows::address_ride();
}

#[test]
fn relation_payment() {
    rows::relation_payment();
}
