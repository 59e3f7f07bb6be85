# Shared tensors, domain types and utilities
