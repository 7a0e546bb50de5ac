# Covariance estimation source package
