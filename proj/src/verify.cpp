namespace anchorloss {}
