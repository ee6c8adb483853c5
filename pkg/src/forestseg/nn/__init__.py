"""From-scratch neural network core: reverse-mode autodiff over NumPy, conv
building blocks backed by the kernel extension, the four segmentation
architectures, Adam, and the checkpoint container."""
