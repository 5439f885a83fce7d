"""Mean-field machinery, predictors and value networks"""
