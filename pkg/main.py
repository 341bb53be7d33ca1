# -*- coding: utf-8 -*-
"""Main entry point for the lung nodule pipeline."""

from lung_dpn.cli import main


if __name__ == "__main__":
    main()
