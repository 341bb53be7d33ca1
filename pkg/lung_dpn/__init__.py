# -*- coding: utf-8 -*-
"""3D dual path networks for lung nodule detection and malignancy diagnosis."""

__version__ = "0.1.0"
