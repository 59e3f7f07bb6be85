# Features package
