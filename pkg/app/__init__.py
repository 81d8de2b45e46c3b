# PME Lab - gradient estimates for the weighted porous medium equation
__version__ = "1.0.0"
